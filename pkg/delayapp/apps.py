from django.apps import AppConfig


class DelayappConfig(AppConfig):
    name = 'delayapp'
    verbose_name = 'Delay control toolkit'
