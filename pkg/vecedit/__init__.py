"""
VecEdit - turn mean-difference steering vectors into sparse rank-1 weight edits
"""

import logging

__version__ = '1.0.0'


def configure_logging(level: str = 'INFO'):
    """Configure the root handler once; repeated calls only change the level."""
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
