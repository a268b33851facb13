from django.db import models
from django.utils.translation import gettext_lazy as _


class Experiment(models.Model):
    """One stored experiment: its config, lifecycle and final report."""

    SCENARIO_CHOICES = [
        ('gnss', 'GNSS'),
        ('ad-stack', 'AD stack'),
    ]

    MODE_CHOICES = [
        ('scripted', 'Scripted'),
        ('live', 'Live'),
    ]

    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    name = models.CharField(max_length=120, verbose_name=_("Name"))
    scenario = models.CharField(max_length=16, choices=SCENARIO_CHOICES, verbose_name=_("Scenario"))
    mode = models.CharField(max_length=16, choices=MODE_CHOICES, verbose_name=_("Mode"))
    config = models.JSONField(verbose_name=_("Config"))
    config_hash = models.CharField(max_length=64, db_index=True, verbose_name=_("Config hash"))
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default='pending', verbose_name=_("Status"))
    output_dir = models.CharField(max_length=500, blank=True, verbose_name=_("Output directory"))
    report = models.JSONField(null=True, blank=True, verbose_name=_("Report"))
    notes = models.JSONField(default=list, blank=True, verbose_name=_("Provenance notes"))
    error_message = models.TextField(blank=True, verbose_name=_("Error"))
    created_at = models.DateTimeField(auto_now_add=True, verbose_name=_("Created At"))
    started_at = models.DateTimeField(null=True, blank=True, verbose_name=_("Started At"))
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name=_("Finished At"))

    class Meta:
        verbose_name = _("Experiment")
        verbose_name_plural = _("Experiments")
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['status', '-created_at'], name='experiment_status_created_idx'),
        ]

    def __str__(self) -> str:
        return f"{self.name} ({self.scenario}, {self.status})"

    @property
    def group_name(self) -> str:
        return f"experiment_{self.pk}"

    @classmethod
    def from_config(cls, config, output_dir='') -> 'Experiment':
        return cls.objects.create(
            name=config.name,
            scenario=config.scenario.value,
            mode=config.mode.value,
            config=config.as_dict(),
            config_hash=config.config_hash,
            output_dir=str(output_dir or ''),
        )


class ExperimentRun(models.Model):
    PHASE_CHOICES = [
        ('full', 'Full run'),
        ('reference', 'Reference'),
        ('attack', 'Attack'),
    ]

    STATUS_CHOICES = [
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    experiment = models.ForeignKey(
        Experiment,
        on_delete=models.CASCADE,
        related_name='runs',
        verbose_name=_("Experiment"),
    )
    index = models.PositiveIntegerField(verbose_name=_("Repetition"))
    phase = models.CharField(max_length=16, choices=PHASE_CHOICES, default='full', verbose_name=_("Phase"))
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, verbose_name=_("Status"))
    seed = models.BigIntegerField(null=True, blank=True, verbose_name=_("Seed"))
    capture_path = models.CharField(max_length=500, blank=True, verbose_name=_("Capture or log path"))
    metrics = models.JSONField(default=dict, blank=True, verbose_name=_("Metrics"))
    flood_stats = models.JSONField(default=dict, blank=True, verbose_name=_("Flood stats"))
    error_message = models.TextField(blank=True, verbose_name=_("Error"))
    created_at = models.DateTimeField(auto_now_add=True, verbose_name=_("Created At"))

    class Meta:
        verbose_name = _("Experiment run")
        verbose_name_plural = _("Experiment runs")
        ordering = ['experiment', 'index', 'phase']
        constraints = [
            models.UniqueConstraint(fields=['experiment', 'index', 'phase'], name='unique_run_per_phase'),
        ]

    def __str__(self) -> str:
        return f"{self.experiment.name} run {self.index} ({self.phase}, {self.status})"

    @classmethod
    def from_record(cls, experiment: Experiment, run) -> 'ExperimentRun':
        """Persist a runner RunRecord."""
        return cls.objects.create(
            experiment=experiment,
            index=run.index,
            phase=run.phase,
            status=run.status.value,
            seed=run.seed,
            capture_path=run.capture_path,
            metrics=run.metrics,
            flood_stats=run.flood_stats,
            error_message=run.error_message,
        )

    def progress_message(self) -> dict:
        phases = (self.metrics or {}).get('phases') or {}
        return {
            'type': 'run_finished',
            'experiment_id': self.experiment_id,
            'index': self.index,
            'phase': self.phase,
            'status': self.status,
            'reference_rate_hz': (phases.get('reference') or {}).get('mean_sample_rate_hz'),
            'attack_rate_hz': (phases.get('attack') or {}).get('mean_sample_rate_hz'),
            'latency_median_s': ((self.metrics or {}).get('latency') or {}).get('median_s'),
            'error': self.error_message,
        }
