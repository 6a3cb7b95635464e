"""Puts the project root on sys.path so tests import `backend` and `utils`."""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
