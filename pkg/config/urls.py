from django.contrib import admin
from django.urls import path, include
from rest_framework import routers
from saferl.api import ExperimentRunViewSet

router = routers.DefaultRouter()
router.register(r'runs', ExperimentRunViewSet, basename='runs')

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/v1/', include(router.urls)),
]
