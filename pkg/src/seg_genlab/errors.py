"""Exception hierarchy shared by all toolkit modules.

Two families, mirroring the CLI exit-code contract: ``ValidationError``
(bad arguments, configs or preconditions; exit code 1) and ``DataError``
(corrupt or inconsistent data files; exit code 2).
"""


class ValidationError(Exception):
    """A request, argument or configuration violates a precondition."""

    exit_code = 1


class DataError(Exception):
    """The content of a data file is malformed or internally inconsistent."""

    exit_code = 2


# --- archive ----------------------------------------------------------------

class FormatError(DataError):
    """A file's header or manifest violates the declared format."""


class IntegrityError(DataError):
    """Declared byte extents, sizes or dimensions are inconsistent."""


class UnsupportedDtypeError(DataError):
    """A tensor declares a dtype other than f32."""


class MissingRoleMapError(ValidationError):
    """Encoder/decoder scope requested on an archive without role prefixes."""


# --- averaging --------------------------------------------------------------

class ArityError(ValidationError):
    """An operation received an empty input collection."""


class ModeError(ValidationError):
    """Inputs do not satisfy the constraints of the requested averaging mode."""


class TrajectoryError(ModeError):
    """SWA inputs mix hyperparameter configurations."""


class OrderingError(ModeError):
    """SWA checkpoint iterations are not strictly increasing."""


class IncompatibleArchivesError(DataError):
    """Input archives disagree on tensor names or shapes."""


# --- rasters / metrics ------------------------------------------------------

class NamingError(ValidationError):
    """A raster filename does not follow the naming convention."""


class EmptyContentError(DataError):
    """An image contains no pixels above the background threshold."""


class TransformError(DataError):
    """A raster's dimensions do not match the frame transform."""


class SizeError(ValidationError):
    """Requested patch geometry does not fit the raster."""


class ShapeError(DataError):
    """Paired rasters have mismatched dimensions."""


class ConsistencyError(ValidationError):
    """A collection mixes lesion codes that must be uniform."""


# --- characterization / planning / synth ------------------------------------

class ParseError(ValidationError):
    """A CSV or config token is outside the allowed vocabulary."""


class ComparisonError(ValidationError):
    """Style comparison requested on empty summaries."""


class JoinError(DataError):
    """Metric records do not cover the experiment plan."""


class PackingError(ValidationError):
    """Synthetic blobs cannot be placed without touching each other."""
