"""
Unit tests for shared configuration, logging, errors and node bases

Tests cover:
- Node config loading and defaults
- Dataclass (de)serialization and override merging
- Logger naming and configuration
- Error hierarchy and NodeResult wrapping
- Base node routing helpers
"""
import logging
from dataclasses import dataclass
from enum import Enum

import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.types import (
    CliValidationError, DegenerateInputError, InternalNode, LeafNode, MarchingError, NeuralSceneError, NodeConfig,
    NodeLevel, NodeResult, NodeType, SceneValidationError,
)
from shared.utils import configure_logging, get_logger
from shared.utils.config import (
    dataclass_from_dict, dataclass_to_dict, load_node_config, load_settings, merge_overrides, node_defaults,
)


class Mode(Enum):
    FAST = "fast"


@dataclass
class Sample:
    size: int = 4
    mode: Mode = Mode.FAST


class EchoLeaf(LeafNode):
    def __init__(self, node_id: str):
        super().__init__(NodeConfig(node_id, "Echo", NodeLevel.LEAF, NodeType.INTERFACE))

    def process(self, input_data):
        if input_data.get("fail"):
            return NodeResult.failure(RuntimeError("boom"), self.node_id)
        return NodeResult(success=True, data=input_data.get("value"), node_id=self.node_id)


class Router(InternalNode):
    def __init__(self):
        super().__init__(NodeConfig("X100", "Router", NodeLevel.LEVEL_1, NodeType.MANAGER))
        self._adopt(EchoLeaf("X110"), EchoLeaf("X120"))

    def process(self, input_data):
        return self.forward(self.left, input_data)


class TestNodeConfigFiles:
    """Per-node config.json files."""

    def test_every_node_has_config(self):
        for node_id in ("M000", "M110", "M121", "M211", "M212", "M221", "M222"):
            assert load_node_config(node_id)["node_id"] == node_id

    def test_renderer_defaults(self):
        """Ray marching defaults are present."""
        defaults = node_defaults("M110")
        assert defaults["num_samples"] == 32
        assert defaults["chunk_size"] == 4096

    def test_defaults_are_copies(self):
        node_defaults("M221")["res"] = -1
        assert node_defaults("M221")["res"] != -1


class TestDataclassHelpers:
    """Mapping to dataclass conversion."""

    def test_round_trip_with_enum(self):
        data = dataclass_to_dict(Sample())
        assert data == {"size": 4, "mode": "fast"}

    def test_unknown_keys_rejected(self):
        with pytest.raises(SceneValidationError):
            dataclass_from_dict(Sample, {"size": 1, "colour": 2})

    def test_non_dataclass_rejected(self):
        with pytest.raises(TypeError):
            dataclass_from_dict(dict, {})

    def test_merge_ignores_unset(self):
        """None-valued overrides leave the base value."""
        merged = merge_overrides({"a": 1, "b": 2}, {"a": None, "b": 3, "c": 4})
        assert merged == {"a": 1, "b": 3, "c": 4}

    def test_load_settings(self, tmp_path):
        path = tmp_path / "settings.yaml"
        path.write_text("train:\n  lr: 0.01\n", encoding="utf-8")
        assert load_settings(path) == {"train": {"lr": 0.01}}

    def test_load_settings_rejects_list(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(SceneValidationError):
            load_settings(path)

    def test_empty_settings(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_settings(path) == {}


class TestLogging:
    """Logger naming and setup."""

    def test_logger_names(self):
        assert get_logger("M111").name == "neural_scene.M111"

    def test_configure_is_idempotent(self, tmp_path):
        """Repeated configuration does not stack handlers."""
        configure_logging("DEBUG")
        root = configure_logging("info", tmp_path / "run.log")
        assert len(root.handlers) == 2
        assert root.level == logging.INFO
        get_logger("M000").info("hello")
        for handler in root.handlers:
            handler.flush()
        assert "neural_scene.M000 - hello" in (tmp_path / "run.log").read_text(encoding="utf-8")
        configure_logging("WARNING")


class TestErrors:
    """Exception hierarchy."""

    def test_validation_family(self):
        assert issubclass(DegenerateInputError, SceneValidationError)
        assert issubclass(CliValidationError, SceneValidationError)
        assert issubclass(SceneValidationError, ValueError)
        assert issubclass(MarchingError, NeuralSceneError)

    def test_failure_kinds(self):
        """Validation errors and runtime errors are told apart."""
        assert NodeResult.failure(SceneValidationError("x"), "M1").error_kind == "validation"
        assert NodeResult.failure(MarchingError("y"), "M1").error_kind == "runtime"

    def test_failure_message_fallback(self):
        result = NodeResult.failure(MarchingError(), "M1")
        assert result.error == "MarchingError"
        assert not result.success


class TestNodeBases:
    """Leaf and internal node helpers."""

    def test_forward_restamps(self):
        """Routed results carry the router's id."""
        result = Router().process({"value": 3})
        assert result.success and result.data == 3
        assert result.node_id == "X100"

    def test_forward_keeps_error_kind(self):
        result = Router().process({"fail": True})
        assert result.error_kind == "runtime"
        assert result.error == "boom"

    def test_set_threads_propagates(self):
        router = Router()
        router.set_threads(4)
        assert router.left.threads == 4 and router.right.threads == 4
        with pytest.raises(SceneValidationError):
            router.set_threads(0)

    def test_level_checks(self):
        with pytest.raises(ValueError):
            LeafNode.__init__(EchoLeaf("X1"), NodeConfig("X2", "bad", NodeLevel.ROOT, NodeType.INTERFACE))

    def test_unknown_action(self):
        result = EchoLeaf("X1").unknown_action("dance")
        assert result.error_kind == "validation"
        assert "dance" in result.error

    def test_status_tree(self):
        status = Router().get_status()
        assert status["left_child"]["node_id"] == "X110"
        assert status["left_child"]["level"] == "LEAF"
