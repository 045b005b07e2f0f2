"""Ontology systems, label resolution and post-coordinated code parsing."""
from __future__ import annotations

import csv
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

logger = logging.getLogger(__name__)

DEFAULT_SYSTEMS = {
    "snomed ct": "http://snomed.info/sct",
    "loinc": "http://loinc.org",
    "hgnc": "https://www.genenames.org",
    "orphanet": "https://www.orpha.net",
}


def normalize_ontology_name(name: str) -> str:
    return " ".join(re.sub(r"[-_]", " ", name).lower().split())


class OntologyRegistry:
    """Maps ontology names to system identifiers (endpoint URLs)."""

    def __init__(self, overrides: Optional[dict[str, str]] = None, defaults: bool = True):
        self._systems: dict[str, str] = {}
        if defaults:
            self._systems.update(DEFAULT_SYSTEMS)
        for name, url in (overrides or {}).items():
            self._systems[normalize_ontology_name(name)] = url
        self._known_urls = set(self._systems.values())
        self._warned: set[str] = set()

    def system_for(self, name: str) -> str:
        key = normalize_ontology_name(name)
        if key in self._systems:
            return self._systems[key]
        verbatim = name.strip()
        if verbatim in self._known_urls:
            return verbatim
        if verbatim not in self._warned:
            self._warned.add(verbatim)
            logger.warning("ontology %r is not registered; using it verbatim as system", verbatim)
        return verbatim

    def __contains__(self, name: str) -> bool:
        return normalize_ontology_name(name) in self._systems or name.strip() in self._known_urls


class LabelSource(Protocol):
    def lookup(self, system: str, code: str) -> str: ...


class StaticLabelSource:
    """Labels from a TSV table of (system, code, label) rows.

    Systems in the table may be given as names or URLs; both go through the
    registry so either spelling matches.
    """

    def __init__(self, rows: Iterable[tuple[str, str, str]], registry: Optional[OntologyRegistry] = None):
        self.registry = registry or OntologyRegistry()
        self._labels: dict[tuple[str, str], str] = {}
        for system, code, label in rows:
            self._labels[(self.registry.system_for(system), code.strip())] = label.strip()

    @classmethod
    def from_tsv(cls, path, registry: Optional[OntologyRegistry] = None) -> "StaticLabelSource":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not row or not "".join(row).strip() or row[0].startswith("#"):
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(row)}")
                if lineno == 1 and [c.strip().lower() for c in row] == ["system", "code", "label"]:
                    continue
                rows.append((row[0], row[1], row[2]))
        return cls(rows, registry)

    def lookup(self, system: str, code: str) -> str:
        return self._labels.get((self.registry.system_for(system), code.strip()), "")


class RemoteLabelSource:
    """HTTP GET of ``url_template`` with ``{code}``/``{system}`` placeholders.

    A 2xx JSON response whose ``label`` field is a non-empty string resolves;
    everything else is treated as an empty label by the resolver.
    """

    def __init__(self, url_template: str, timeout: float = 5.0, token: Optional[str] = None,
                 min_interval: float = 0.0):
        self.url_template = url_template
        self.timeout = timeout
        self.token = token
        self.min_interval = min_interval
        self._last_call = 0.0
        self._rate_lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: dict) -> "RemoteLabelSource":
        token = None
        env_name = cfg.get("tokenEnv")
        if env_name:
            token = os.environ.get(env_name)
            if token is None:
                logger.warning("environment variable %s is not set; querying without auth", env_name)
        rate = cfg.get("rateLimit")
        return cls(
            cfg["urlTemplate"],
            timeout=float(cfg.get("timeout", 5.0)),
            token=token,
            min_interval=1.0 / float(rate) if rate else 0.0,
        )

    def _throttle(self):
        if self.min_interval <= 0:
            return
        with self._rate_lock:
            wait = self._last_call + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_call = time.monotonic()

    def lookup(self, system: str, code: str) -> str:
        url = self.url_template.format(
            code=urllib.parse.quote(code, safe=""), system=urllib.parse.quote(system, safe="")
        )
        req = urllib.request.Request(url, headers={"Accept": "application/json"})
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        self._throttle()
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            if not 200 <= resp.status < 300:
                return ""
            payload = json.loads(resp.read().decode("utf-8") or "null")
        label = payload.get("label") if isinstance(payload, dict) else None
        return label.strip() if isinstance(label, str) else ""


class CompositeLabelSource:
    """Try each source in order; first non-empty label wins."""

    def __init__(self, *sources: LabelSource):
        self.sources = sources

    def lookup(self, system: str, code: str) -> str:
        for src in self.sources:
            try:
                label = src.lookup(system, code)
            except Exception as exc:  # a failing source must not hide the next one
                logger.debug("label source %r failed for %s|%s: %s", src, system, code, exc)
                continue
            if label:
                return label
        return ""


class NullLabelSource:
    def lookup(self, system: str, code: str) -> str:
        return ""


@dataclass
class Resolver:
    """Total, cached label resolution with a per-run outcome log."""

    source: LabelSource = field(default_factory=NullLabelSource)
    concurrency: int = 4
    cache: dict[tuple[str, str], str] = field(default_factory=dict)
    failures: dict[tuple[str, str], str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def resolve(self, system: str, code: str) -> str:
        key = (system, code)
        with self._lock:
            if key in self.cache:
                return self.cache[key]
        try:
            label = self.source.lookup(system, code) or ""
            reason = "" if label else "empty result"
        except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
            label, reason = "", f"{type(exc).__name__}: {exc}"
        except Exception as exc:
            label, reason = "", f"{type(exc).__name__}: {exc}"
        with self._lock:
            self.cache[key] = label
            if not label:
                self.failures[key] = reason
        return label

    def resolve_many(self, pairs: Iterable[tuple[str, str]]) -> dict[tuple[str, str], str]:
        todo = list(dict.fromkeys(pairs))
        if self.concurrency > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
                labels = list(pool.map(lambda p: self.resolve(*p), todo))
        else:
            labels = [self.resolve(*p) for p in todo]
        return dict(zip(todo, labels))


def resolve_label(system: str, code: str, src: LabelSource) -> str:
    """One-shot resolution; never raises."""
    return Resolver(source=src, concurrency=1).resolve(system, code)


_TOKEN = r'(?:[A-Za-z0-9][A-Za-z0-9._\-]*|"[^"]*")'
_REFINEMENT = re.compile(rf"\s*:\s*({_TOKEN})\s*=\s*({_TOKEN})\s*")
_FOCUS = re.compile(rf"\s*({_TOKEN})")


@dataclass(frozen=True)
class PostCoordinatedCode:
    focus: str
    refinements: tuple[tuple[str, str], ...] = ()
    opaque: bool = False

    @property
    def is_simple(self) -> bool:
        return not self.refinements

    def serialize(self) -> str:
        return self.focus + "".join(f":{a}={v}" for a, v in self.refinements)


def parse_post_coordinated(code: str) -> PostCoordinatedCode:
    """Parse ``focus(:attribute=value)*``; anything else is kept as an opaque code."""
    m = _FOCUS.match(code)
    if m and not code.startswith('"'):
        pos = m.end()
        refinements = []
        while pos < len(code):
            r = _REFINEMENT.match(code, pos)
            if not r:
                break
            refinements.append((r.group(1), r.group(2)))
            pos = r.end()
        if pos == len(code) or not code[pos:].strip():
            return PostCoordinatedCode(m.group(1), tuple(refinements))
    logger.warning("code %r is not a well-formed post-coordinated expression; kept opaque", code)
    return PostCoordinatedCode(code, (), opaque=True)
