from django.apps import AppConfig


class MagicPyramidConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'mp'
    verbose_name = 'Magic Pyramid'
