"""Exception hierarchy shared across the package."""


class TerranavError(Exception):
    """Base class for all package errors."""


class RasterFormatError(TerranavError, ValueError):
    """Raster container file is malformed."""


class OutOfExtentError(TerranavError, ValueError):
    """A query or window falls outside a grid's extent."""


class DegenerateAltitudeError(TerranavError, ValueError):
    """Camera altitude is at or below the terrain."""


class DegenerateGeometryError(TerranavError, ValueError):
    """Too few or ill-conditioned correspondences for a geometric solve."""


class DimensionMismatchError(TerranavError, ValueError):
    """Two rasters or spectra that must agree in shape do not."""


class ScenarioError(TerranavError, ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
