from django.core.exceptions import ValidationError
from django.core.serializers.json import DjangoJSONEncoder
from django.core.validators import MinValueValidator
from django.db import models

SUBCOMMANDS = [
    ('simulate', 'Simulate'),
    ('svie-check', 'SVIE check'),
    ('cost', 'Cost'),
    ('grad-check', 'Gradient check'),
    ('absde-solve', 'ABSDE solve'),
    ('duality-check', 'Duality check'),
    ('clark-ocone', 'Clark-Ocone'),
    ('lq-verify', 'LQ verify'),
    ('nash-check', 'Nash check'),
]


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('PA', 'Pass'),
        ('FI', 'Finding'),
        ('ER', 'Error'),
    ]
    subcommand = models.CharField(max_length=16, choices=SUBCOMMANDS)
    status = models.CharField(max_length=2, choices=STATUS_CHOICES)
    seed = models.BigIntegerField()
    n_paths = models.IntegerField(validators=[MinValueValidator(1)])
    config = models.JSONField(encoder=DjangoJSONEncoder)
    report = models.JSONField(encoder=DjangoJSONEncoder, null=True, blank=True)
    wall_time = models.FloatField(default=0.0)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def clean(self):
        super().clean()
        errors = {}
        if self.status in ('PA', 'FI') and self.report is None:
            errors['report'] = 'A finished run must carry its report'
        if self.wall_time is not None and self.wall_time < 0:
            errors['wall_time'] = 'The wall time cannot be negative'
        if errors:
            raise ValidationError(errors)

    def __str__(self):
        return f'{self.subcommand} seed={self.seed} ({self.get_status_display()})'
