from django.conf import settings

DEFAULTS = {
    'REGRESSION_DEGREE': 3,
    'RIDGE': 1e-8,
    'MAX_CONDITION': 1e12,
    'PATH_BLOCK': 4096,
    'FD_STEP': 1e-4,
    'STAT_SIGMAS': 3.0,
    'ACCEPT_SIGMAS': 5.0,
    'SKOROKHOD_CORRECTION': True,
    'STRICT_DELAY_INDICATOR': True,
    'WINDOW_READING': 'moving-window',
    'LQ_DENOMINATOR': 'windowed',
}


def toolkit_setting(name):
    """Read one entry of settings.DELAY_TOOLKIT, falling back to DEFAULTS."""
    if not settings.configured:
        return DEFAULTS[name]
    overrides = getattr(settings, 'DELAY_TOOLKIT', {})
    return overrides.get(name, DEFAULTS[name])
