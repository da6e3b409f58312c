"""Step-size control constants and status codes shared by both backends."""

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

STATUS_OK = 0
STATUS_STEP_LIMIT = 1
STATUS_SINGULAR = 2
