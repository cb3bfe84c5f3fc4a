from django.apps import AppConfig


class DtnConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'dtn'
    verbose_name = 'Dirichlet-to-Neumann maps'
