"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import configparser
import io
import json
import os
from typing import Any, Optional

from pydantic import BaseModel, Field, ValidationError

from distributions import FittedDistribution
from errors import InvalidSpecification
from logutils import get_logger
from rr_models import RelativeRiskModel
from utils import get_configs, parse_float_list

logger = get_logger(__name__)

TOOL_VERSION = "1.0.0"
DEFAULTS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs", "defaults.ini")


class Defaults:
    """Access to the reference constants in ``configs/defaults.ini``."""

    def __init__(self, file_path=None):
        """
        Initialize the defaults reader.

        Args:
            file_path (str, optional): Path to the defaults file. Falls back to
                ``PIFPAF_DEFAULTS_FILE`` and then the bundled file.
        """
        self.file_path = file_path or get_configs(
            "PIFPAF_DEFAULTS_FILE", default_value=DEFAULTS_PATH
        )
        self.config = self._load_config()

    def _load_config(self):
        """Load and parse the defaults file."""
        if not os.path.exists(self.file_path):
            raise FileNotFoundError(f"Defaults file '{self.file_path}' is missing.")

        config = configparser.ConfigParser()
        config.read(self.file_path, encoding="utf-8")
        return config

    def section(self, name: str) -> configparser.SectionProxy:
        """
        Retrieve a section.

        Raises:
            ValueError: If the section does not exist.
        """
        if name not in self.config:
            available = ", ".join(self.config.sections())
            raise ValueError(
                f"Defaults section '{name}' is not available. Available options: {available}"
            )
        return self.config[name]

    def get(self, section: str, key: str) -> str:
        """
        Retrieve a raw value.

        Raises:
            KeyError: If the key is missing from the section.
        """
        proxy = self.section(section)
        if key not in proxy:
            raise KeyError(f"Defaults key '{key}' is missing under the '{section}' section.")
        return proxy[key]

    def get_float(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def get_int(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def get_floats(self, section: str, key: str) -> list[float]:
        return parse_float_list(self.get(section, key))

    def get_names(self, section: str, key: str) -> list[str]:
        return [item.strip() for item in self.get(section, key).split(",") if item.strip()]

    def risk_model(self):
        """Relative risk model built from the ``[risk]`` section."""
        return RelativeRiskModel.from_rr_ci(
            self.get_float("risk", "rr"),
            self.get_float("risk", "rr_lower"),
            self.get_float("risk", "rr_upper"),
            level=self.get_float("risk", "level"),
            form=self.get("risk", "form"),
        )

    def distribution(self, section: str):
        """
        Builds a distribution from a section with ``family``, ``params`` and
        optional ``p0``, ``lower`` and ``upper`` keys.
        """
        proxy = self.section(section)
        lower = proxy.get("lower")
        upper = proxy.get("upper")
        return FittedDistribution(
            proxy["family"],
            tuple(parse_float_list(proxy["params"])),
            lower=float(lower) if lower else None,
            upper=float(upper) if upper else None,
            zero_mass=float(proxy.get("p0", "0")),
        )

    def distributions(self, section: str, key: str) -> list:
        """Distributions named by a comma-separated list of section names."""
        return [self.distribution(name) for name in self.get_names(section, key)]


class RunConfig(BaseModel):
    """Command, options and seed of one invocation; embedded in outputs."""

    command: str
    options: dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    version: str = TOOL_VERSION

    def to_ini(self) -> str:
        """Serialises to the ``[run]``/``[options]`` key-value format."""
        config = configparser.ConfigParser(interpolation=None)
        config["run"] = {"command": self.command, "version": self.version}
        if self.seed is not None:
            config["run"]["seed"] = str(self.seed)
        config["options"] = {
            key: json.dumps(value) for key, value in self.options.items() if value is not None
        }
        buffer = io.StringIO()
        config.write(buffer)
        return buffer.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        """
        Parses the key-value format written by :meth:`to_ini`.

        Raises:
            InvalidSpecification: If the ``[run]`` section or command is missing.
        """
        config = configparser.ConfigParser(interpolation=None)
        try:
            config.read_string(text)
        except configparser.Error as error:
            raise InvalidSpecification(f"Malformed config file: {error}") from error

        if "run" not in config or "command" not in config["run"]:
            raise InvalidSpecification("Config file needs a [run] section with a command.")

        options = {}
        if "options" in config:
            for key, raw in config["options"].items():
                try:
                    options[key] = json.loads(raw)
                except json.JSONDecodeError:
                    options[key] = raw
        seed = config["run"].get("seed")
        return cls(
            command=config["run"]["command"],
            options=options,
            seed=int(seed) if seed else None,
            version=config["run"].get("version", TOOL_VERSION),
        )

    @classmethod
    def from_document(cls, text: str) -> "RunConfig":
        """Extracts the embedded config of a JSON output document."""
        try:
            document = json.loads(text)
            return cls.model_validate(document["config"])
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as error:
            raise InvalidSpecification(
                f"Not a JSON output document with an embedded config: {error}"
            ) from error

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        """Reads an ``.ini`` config or a previous ``--json`` output."""
        try:
            with open(path, "r", encoding="utf-8") as file:
                text = file.read()
        except OSError as error:
            logger.error("Unable to read config '%s': %s", path, error)
            raise InvalidSpecification(f"Unable to read config '{path}': {error}") from error

        if text.lstrip().startswith("{"):
            return cls.from_document(text)
        return cls.from_ini(text)
