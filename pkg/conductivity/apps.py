from django.apps import AppConfig


class ConductivityConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'conductivity'
