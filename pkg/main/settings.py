"""
Django settings for the dosbench project.

Benchmark knobs are plain settings with environment overrides; application code
reads them with ``getattr(settings, NAME, default)``.

For more information on this file, see
https://docs.djangoproject.com/en/5.0/topics/settings/
"""

import os
from pathlib import Path
import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()

environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env("SECRET_KEY", default="dosbench-insecure-development-key")

DEBUG = env.bool("DEBUG", default=False)

ALLOWED_HOSTS = env("ALLOWED_HOSTS", default="127.0.0.1,localhost").split(",")


# Application definition

INSTALLED_APPS = [
    'daphne',
    'channels',
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'packet_forge.apps.PacketForgeConfig',
    'control_workload.apps.ControlWorkloadConfig',
    'device_sim.apps.DeviceSimConfig',
    'stream_codec.apps.StreamCodecConfig',
    'timing_analysis.apps.TimingAnalysisConfig',
    'orchestrator.apps.OrchestratorConfig',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'main.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

ASGI_APPLICATION = 'main.asgi.application'

# Database
# Experiment and run provenance only; raw captures live on disk.

DATABASES = {
    'default': env.db("DATABASE_URL", default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}"),
}

REDIS_URL = env("REDIS_URL", default="redis://127.0.0.1:6379/0")

# Channel Layer Configuration
# Redis for multi-process deployments, in-memory for desk runs and tests.
if env("CHANNEL_LAYER_BACKEND", default="memory") == "redis":
    CHANNEL_LAYERS = {
        "default": {
            "BACKEND": "channels_redis.core.RedisChannelLayer",
            "CONFIG": {
                "hosts": [REDIS_URL],
            },
        },
    }
else:
    CHANNEL_LAYERS = {
        "default": {
            "BACKEND": "channels.layers.InMemoryChannelLayer",
        },
    }

# Celery Configuration (uses Redis)
CELERY_BROKER_URL = REDIS_URL
CELERY_RESULT_BACKEND = REDIS_URL
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TASK_ALWAYS_EAGER = env.bool("CELERY_TASK_ALWAYS_EAGER", default=False)
CELERY_TIMEZONE = 'UTC'

# Internationalization

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

STATIC_URL = '/static/'
STATIC_ROOT = BASE_DIR / "staticfiles"

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# ===== BENCHMARK SETTINGS =====

DOSBENCH_OUTPUT_DIR = Path(env("DOSBENCH_OUTPUT_DIR", default=str(BASE_DIR / 'runs')))

# packet_forge
FLOOD_MTU_BYTES = env.int("FLOOD_MTU_BYTES", default=1500)
FLOOD_UDP_PORT = env.int("FLOOD_UDP_PORT", default=9)
FLOOD_BURST_LIMIT = env.int("FLOOD_BURST_LIMIT", default=64)

# device_sim
DEVICE_SIM_HOST = env("DEVICE_SIM_HOST", default="127.0.0.1")
DEVICE_SIM_PORT = env.int("DEVICE_SIM_PORT", default=6001)
DEVICE_SIM_QUEUE_SIZE = env.int("DEVICE_SIM_QUEUE_SIZE", default=4096)

# control_workload
MPC_HORIZON = env.int("MPC_HORIZON", default=20)
MPC_DT_MS = env.float("MPC_DT_MS", default=18.0)
MPC_ITERATIONS = env.int("MPC_ITERATIONS", default=30)
MPC_SEED_GRID = env.int("MPC_SEED_GRID", default=21)
VEHICLE_WHEELBASE_M = env.float("VEHICLE_WHEELBASE_M", default=2.7)
STEER_MAX_RAD = env.float("STEER_MAX_RAD", default=0.5)
ACCEL_MIN = env.float("ACCEL_MIN", default=-4.0)
ACCEL_MAX = env.float("ACCEL_MAX", default=2.0)


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': BASE_DIR / 'logs' / 'dosbench.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': env("CONSOLE_LOG_LEVEL", default="INFO"),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        app: {
            'handlers': ['file', 'console'],
            'level': 'INFO',
            'propagate': False,
        }
        for app in (
            'packet_forge',
            'control_workload',
            'device_sim',
            'stream_codec',
            'timing_analysis',
            'orchestrator',
        )
    },
}

# Ensure logs directory exists
os.makedirs(BASE_DIR / 'logs', exist_ok=True)
