"""WSGI entry point serving the run registry API and admin."""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'magic_pyramid.settings')

application = get_wsgi_application()
