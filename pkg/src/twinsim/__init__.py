"""Digital-twin IoT network simulation with RTPS-lite discovery and DDPG scheduling."""

__version__ = "0.1.0"
