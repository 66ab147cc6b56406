import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BenchReport',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('checkpoint', models.CharField(max_length=500)),
                ('corpus', models.CharField(max_length=500)),
                ('methods', models.JSONField(default=list)),
                ('tau_grid', models.JSONField(default=list)),
                ('output_dir', models.CharField(max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('preset', models.CharField(max_length=20)),
                ('seed', models.IntegerField(default=0)),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('error', models.TextField(blank=True)),
                ('output_dir', models.CharField(max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='BenchRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(max_length=20)),
                ('tau', models.FloatField(blank=True, null=True)),
                ('bucket', models.CharField(max_length=20)),
                ('count', models.PositiveIntegerField()),
                ('mean_gflops', models.FloatField(blank=True, null=True)),
                ('speedup', models.FloatField(blank=True, null=True)),
                ('accuracy', models.FloatField(blank=True, null=True)),
                ('mean_exit_layer', models.FloatField(blank=True, null=True)),
                ('note', models.CharField(blank=True, max_length=100)),
                ('report', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='rows', to='mp.benchreport')),
            ],
            options={
                'ordering': ['report', 'id'],
            },
        ),
        migrations.CreateModel(
            name='StageCheckpoint',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('stage', models.CharField(choices=[('regular', 'Regular training'), ('soft', 'Soft pruning'), ('hard', 'Hard pruning'), ('sub', 'Sub-classifier training')], max_length=20)),
                ('index', models.PositiveIntegerField()),
                ('epochs', models.PositiveIntegerField()),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('path', models.CharField(max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='checkpoints', to='mp.trainingrun')),
            ],
            options={
                'ordering': ['run', 'index'],
                'unique_together': {('run', 'stage')},
            },
        ),
    ]
