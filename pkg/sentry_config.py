"""Sentry SDK configuration"""

import sentry_sdk

from run_config import TOOL_VERSION
from utils import get_configs

SENTRY_ENABLED = bool(get_configs("SENTRY_DSN"))
DIAGNOSTIC_FIELDS = ("value", "error_estimate", "subdivisions", "iterations")


def initialize_sentry():
    """
    Initializes Sentry SDK.
    """

    sentry_sdk.init(
        dsn=get_configs("SENTRY_DSN"),
        server_name="pifpaf",
        release=f"pifpaf@{TOOL_VERSION}",
        traces_sample_rate=float(
            get_configs("SENTRY_TRACES_SAMPLE_RATE", default_value=1.0)
        ),
    )

    sentry_sdk.set_tag("project", "pifpaf")
    sentry_sdk.set_tag("service_name", "pifpaf CLI")


def report_exception(error: Exception) -> None:
    """
    Forwards ``error`` to Sentry when reporting is enabled.

    Quadrature and optimizer diagnostics carried by the error are attached
    as the ``numerics`` context.
    """
    if not SENTRY_ENABLED:
        return

    diagnostics = {
        name: getattr(error, name)
        for name in DIAGNOSTIC_FIELDS
        if getattr(error, name, None) is not None
    }
    with sentry_sdk.new_scope() as scope:
        if diagnostics:
            scope.set_context("numerics", diagnostics)
        scope.set_tag("error_type", type(error).__name__)
        sentry_sdk.capture_exception(error)
