"""
URL configuration for the dosbench project.

Only the admin is exposed over HTTP; experiments and runs are browsed there.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
