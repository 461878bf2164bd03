import base64
from typing import Any, Literal

import numpy as np
from pydantic import ConfigDict, Field

import revup
from revup.config import ConfiguredBaseModel, ModelConfig

#: Payload dtype: little-endian IEEE float64, row-major.
PAYLOAD_DTYPE = np.dtype("<f8")


class SerialTensor(ConfiguredBaseModel):
    """One named parameter array."""

    name: str
    shape: list[int]
    data: str = Field(description="Base64 of the little-endian float64 values.")

    @classmethod
    def encode(cls, name: str, array: np.ndarray) -> "SerialTensor":
        raw = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        return cls(
            name=name, shape=list(array.shape), data=base64.b64encode(raw).decode()
        )

    def decode(self) -> np.ndarray:
        values = np.frombuffer(base64.b64decode(self.data), dtype=PAYLOAD_DTYPE)
        return values.reshape(self.shape).astype(np.float64)


class SerialCategorical(ConfiguredBaseModel):
    name: str
    #: Known categories in index order, starting at index 1.
    categories: list[str]


class SerialSchema(ConfiguredBaseModel):
    numeric_columns: list[str]
    categorical: list[SerialCategorical]
    treatment_column: str | None
    treatment_mapping: dict[str, int]
    response_column: str


class SerialCheckpoint(ConfiguredBaseModel):
    """A serializable trained model: architecture, schema and parameters."""

    version: Literal["v1"] = "v1"
    encoder: str | None = Field(
        default=None, description="The name of the encoder that wrote the file."
    )
    architecture: ModelConfig
    feature_schema: SerialSchema
    schema_fingerprint: str
    tensors: list[SerialTensor]

    def to_json(self) -> str:
        """Return a JSON representation of the checkpoint."""
        self.encoder = f"revup-py v{revup.__version__}"
        return self.model_dump_json()

    @classmethod
    def load_json(cls, json: dict[Any, Any]) -> "SerialCheckpoint":
        """Decode a JSON-encoded checkpoint."""
        return cls(**json)

    @classmethod
    def get_version(cls) -> str:
        """Return the version of the schema."""
        return cls.model_fields["version"].default

    model_config = ConfigDict(
        title="Checkpoint",
        json_schema_extra={
            "required": ["version", "architecture", "feature_schema", "tensors"],
        },
    )
