"""Exception hierarchy shared by every stage of the pipeline."""


class QoEError(Exception):
    """Base class; the CLI maps these to exit code 1."""

    module = "qoe_eeg"

    def __str__(self):
        return f"{self.module}: {super().__str__()}"


# ingest
class IngestError(QoEError):
    module = "ingest"


class MissingChannel(IngestError):
    pass


class MalformedRow(IngestError):
    pass


class BadMetadata(IngestError):
    pass


class PairMismatch(IngestError):
    pass


class InvalidRating(IngestError):
    pass


class InvalidSpec(IngestError):
    pass


class RecordingTooShort(IngestError):
    pass


# dsp
class DspError(QoEError):
    module = "dsp"


class InvalidBand(DspError):
    pass


class UnstableDesign(DspError):
    pass


class TooShort(DspError):
    pass


class SegmentTooShort(DspError):
    pass


class BandOutOfRange(DspError):
    pass


# dataset
class DatasetError(QoEError):
    module = "dataset"


class OutOfRange(DatasetError):
    pass


class ShapeMismatch(DatasetError):
    pass


class MissingFactor(DatasetError):
    pass


class EmptyTrainSet(DatasetError):
    pass


class EmptyClass(DatasetError):
    pass


class TooFewExamples(DatasetError):
    pass


# nn
class NNError(QoEError):
    module = "nn"


class InvalidConfig(NNError):
    pass


class DegenerateBatch(NNError):
    pass


class LayerShapeMismatch(NNError):
    pass


class CheckpointError(NNError):
    pass


# train
class TrainError(QoEError):
    module = "train"


class EmptyEvalSet(TrainError):
    pass


class EmptyAxis(TrainError):
    pass


class InvalidKind(TrainError):
    pass
