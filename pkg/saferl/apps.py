from django.apps import AppConfig

class SaferlConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'saferl'
    verbose_name = 'Safe offline RL'
