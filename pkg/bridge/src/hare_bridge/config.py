from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    """Checkpoint locations and inference settings.

    The exporter never filters by confidence; downstream consumers own
    all threshold semantics.
    """

    ner_checkpoint: str = ""
    re_checkpoint: str = ""
    embed_checkpoint: str = ""
    device: str = "cpu"
    batch_size: int = 16
    max_length: int = 512
    # candidate relation pairs farther apart than this many characters
    # are never sent to the pair classifier
    pair_window: int = 240

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_length < 8:
            raise ValueError("max_length must be at least 8")
        if self.pair_window < 0:
            raise ValueError("pair_window must be non-negative")
