"""Exception types shared across the package."""


class SpivgError(Exception):
    """Base class for all errors raised by this package."""

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ShapeError(SpivgError):
    """An operation received tensors whose shapes do not conform."""

    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)

    def to_json(self) -> dict:
        out = super().to_json()
        out["op"] = self.op
        out["shapes"] = [list(s) for s in self.shapes]
        return out


class ConfigError(SpivgError):
    """Invalid or unknown configuration content."""


class StoreError(SpivgError):
    """Feature-store manifest or blob problem, with the offending video id."""

    def __init__(self, message: str, video_id: str | None = None):
        self.video_id = video_id
        if video_id is not None:
            message = f"video '{video_id}': {message}"
        super().__init__(message)

    def to_json(self) -> dict:
        out = super().to_json()
        if self.video_id is not None:
            out["video_id"] = self.video_id
        return out


class PipelineError(SpivgError):
    """Training or evaluation could not proceed."""


class TrainingDiverged(PipelineError):
    def __init__(self, epoch: int, video_id: str):
        self.epoch = epoch
        self.video_id = video_id
        super().__init__(f"non-finite loss at epoch {epoch}, video '{video_id}'")

    def to_json(self) -> dict:
        out = super().to_json()
        out["epoch"] = self.epoch
        out["video_id"] = self.video_id
        return out
