"""Low-footprint acoustic scene classification toolkit."""

__version__ = "0.1.0"

SCENES = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
NUM_CLASSES = len(SCENES)
