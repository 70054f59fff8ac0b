"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end, so a
failing subcommand can be told apart from a usage error by its status.
"""


class HMLError(Exception):
    exit_code = 1


class InputError(HMLError):
    exit_code = 3


class IoFailure(InputError):
    pass


# hierarchy ---------------------------------------------------------------

class HierarchyError(HMLError):
    exit_code = 4


class NonNestingGrid(HierarchyError):
    pass


class NonDivisibleImage(HierarchyError):
    pass


class CyclicSpec(HierarchyError):
    pass


class OutOfBoundsRect(HierarchyError):
    pass


class InvalidSpec(HierarchyError):
    pass


class UnknownPatch(HierarchyError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# features / data ---------------------------------------------------------

class DataError(HMLError):
    exit_code = 5


class DimensionMismatch(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class FractionOutOfRange(DataError, ValueError):
    pass


class MalformedRecord(DataError):
    pass


class InconsistentPatchSet(DataError):
    pass


class NonFiniteValue(DataError, ValueError):
    pass


# models ------------------------------------------------------------------

class ModelError(HMLError):
    exit_code = 6


class EmptyGallery(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class MissingClassifier(ModelError):
    pass


class MissingRecord(ModelError):
    pass


class AllAbstain(ModelError):
    pass


class InsufficientSamples(ModelError):
    pass


# pipeline / configuration ------------------------------------------------

class PipelineError(HMLError):
    exit_code = 7


class EmptySplit(PipelineError):
    pass


class UnknownGlobalKind(PipelineError, ValueError):
    pass


class ConfigConflict(PipelineError):
    pass


class InvalidConfig(PipelineError, ValueError):
    pass


class ManifestError(PipelineError):
    pass


class HierarchyMismatch(PipelineError):
    pass


class EmptyProbeSet(PipelineError):
    pass


class GalleryChanged(PipelineError):
    """Gallery identities differ from the ones the bundle was trained on."""


# bundles -----------------------------------------------------------------

class BundleError(HMLError):
    exit_code = 8


class VersionMismatch(BundleError):
    pass


class CorruptBundle(BundleError):
    pass


# statistics --------------------------------------------------------------

class StatsError(HMLError):
    exit_code = 9


class InvalidScoreTable(StatsError, ValueError):
    pass


class DegenerateDenominator(StatsError, ZeroDivisionError):
    pass


class UnsupportedAlphaOrK(StatsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# warnings ----------------------------------------------------------------

class DegenerateWeights(UserWarning):
    """Weight solver fell back to uniform weights."""


class DegenerateRow(UserWarning):
    """A score-table row has all methods tied."""
