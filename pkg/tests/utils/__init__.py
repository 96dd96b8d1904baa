# Tests for allocnet.utils modules
