"""Planning toolkit for fast-charging station networks.

Sites and sizes charging stations for battery-electric vehicles over a
road network coupled to a radial distribution grid, and validates the
resulting service levels with a discrete-event station simulator.
"""

__version__ = "0.1.0"
