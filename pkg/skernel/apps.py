from django.apps import AppConfig


class SkernelConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'skernel'
