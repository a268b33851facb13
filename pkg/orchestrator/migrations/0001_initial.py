# Generated by Django 5.2.6

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Experiment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=120, verbose_name='Name')),
                ('scenario', models.CharField(choices=[('gnss', 'GNSS'), ('ad-stack', 'AD stack')], max_length=16, verbose_name='Scenario')),
                ('mode', models.CharField(choices=[('scripted', 'Scripted'), ('live', 'Live')], max_length=16, verbose_name='Mode')),
                ('config', models.JSONField(verbose_name='Config')),
                ('config_hash', models.CharField(db_index=True, max_length=64, verbose_name='Config hash')),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=16, verbose_name='Status')),
                ('output_dir', models.CharField(blank=True, max_length=500, verbose_name='Output directory')),
                ('report', models.JSONField(blank=True, null=True, verbose_name='Report')),
                ('notes', models.JSONField(blank=True, default=list, verbose_name='Provenance notes')),
                ('error_message', models.TextField(blank=True, verbose_name='Error')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Created At')),
                ('started_at', models.DateTimeField(blank=True, null=True, verbose_name='Started At')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Finished At')),
            ],
            options={
                'verbose_name': 'Experiment',
                'verbose_name_plural': 'Experiments',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['status', '-created_at'], name='experiment_status_created_idx')],
            },
        ),
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('index', models.PositiveIntegerField(verbose_name='Repetition')),
                ('phase', models.CharField(choices=[('full', 'Full run'), ('reference', 'Reference'), ('attack', 'Attack')], default='full', max_length=16, verbose_name='Phase')),
                ('status', models.CharField(choices=[('completed', 'Completed'), ('failed', 'Failed')], max_length=16, verbose_name='Status')),
                ('seed', models.BigIntegerField(blank=True, null=True, verbose_name='Seed')),
                ('capture_path', models.CharField(blank=True, max_length=500, verbose_name='Capture or log path')),
                ('metrics', models.JSONField(blank=True, default=dict, verbose_name='Metrics')),
                ('flood_stats', models.JSONField(blank=True, default=dict, verbose_name='Flood stats')),
                ('error_message', models.TextField(blank=True, verbose_name='Error')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Created At')),
                ('experiment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='runs', to='orchestrator.experiment', verbose_name='Experiment')),
            ],
            options={
                'verbose_name': 'Experiment run',
                'verbose_name_plural': 'Experiment runs',
                'ordering': ['experiment', 'index', 'phase'],
                'constraints': [models.UniqueConstraint(fields=('experiment', 'index', 'phase'), name='unique_run_per_phase')],
            },
        ),
    ]
