# Generated by Django 6.0.1 on 2026-03-02 10:12

import django.core.serializers.json
import django.core.validators
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('subcommand', models.CharField(choices=[('simulate', 'Simulate'), ('svie-check', 'SVIE check'), ('cost', 'Cost'), ('grad-check', 'Gradient check'), ('absde-solve', 'ABSDE solve'), ('duality-check', 'Duality check'), ('clark-ocone', 'Clark-Ocone'), ('lq-verify', 'LQ verify'), ('nash-check', 'Nash check')], max_length=16)),
                ('status', models.CharField(choices=[('PA', 'Pass'), ('FI', 'Finding'), ('ER', 'Error')], max_length=2)),
                ('seed', models.BigIntegerField()),
                ('n_paths', models.IntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('config', models.JSONField(encoder=django.core.serializers.json.DjangoJSONEncoder)),
                ('report', models.JSONField(blank=True, encoder=django.core.serializers.json.DjangoJSONEncoder, null=True)),
                ('wall_time', models.FloatField(default=0.0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
