"""Source resolution: base-image lookup, download cache, and materialization.

A FROM argument is one of three things: an HTTP(S)/FTP URL, a block device,
or a local file.  URLs are downloaded once into a content-keyed cache
(`sha256(url)`), so repeated builds of the same Pifile hit the network a
single time.  Compressed sources (.zip/.gz/.xz/.zst) are unpacked before
use; an archive must contain exactly one image.

Cache layout, under the directory given by --cache, $PIMOD_CACHE, or a
`.pimod-cache` directory beside the Pifile::

    <key>/image     the downloaded bytes, moved into place atomically
    <key>/meta      url=..., fetched_at=..., size=... (one per line)
    <key>.lock      advisory lock serializing concurrent invocations
"""

from __future__ import annotations

import errno
import fcntl
import gzip
import hashlib
import logging
import lzma
import os
import shutil
import stat as stat_module
import time
import urllib.error
import urllib.parse
import urllib.request
import zipfile
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, BinaryIO, Callable, Iterator

from .errors import (
    CacheUnwritable,
    CorruptArchive,
    DestinationIsDirectory,
    FetchFailed,
    IoFailure,
    MultipleImagesInArchive,
    SourceNotFound,
    UnsupportedArchive,
)

if TYPE_CHECKING:
    from .executor import Executor
    from .plan import ExecutionPlan

logger = logging.getLogger(__name__)

Fetcher = Callable[[str, Path], None]

URL_SCHEMES = frozenset({"http", "https", "ftp"})

_DECOMPRESS_SUFFIXES = frozenset({".gz", ".xz", ".zst"})
_REJECTED_SUFFIXES = frozenset({".bz2", ".tar", ".tgz", ".txz", ".tbz2", ".lz4", ".7z", ".rar"})


class SourceKind(Enum):
    LOCAL_FILE = "local-file"
    BLOCK_DEVICE = "block-device"
    URL = "url"


class TargetKind(Enum):
    LOCAL_FILE = "local-file"
    BLOCK_DEVICE = "block-device"


@dataclass(frozen=True)
class SourceSpec:
    kind: SourceKind
    locator: str
    partition_index: int


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind
    path: str


@dataclass(frozen=True)
class CacheEntry:
    key: str
    stored_path: Path
    fetched_at: float


def is_url(locator: str) -> bool:
    return urllib.parse.urlsplit(locator).scheme in URL_SCHEMES


def default_probe(locator: str) -> SourceKind | None:
    """Filesystem probe: block device, regular file, or None when absent."""
    try:
        st = os.stat(locator)
    except OSError:
        return None
    if stat_module.S_ISBLK(st.st_mode):
        return SourceKind.BLOCK_DEVICE
    if stat_module.S_ISREG(st.st_mode):
        return SourceKind.LOCAL_FILE
    return None


def classify_source(locator: str,
                    fs_probe: Callable[[str], SourceKind | None] = default_probe) -> SourceKind:
    """Decide what a FROM/INPLACE argument names.

    URLs are recognized by scheme alone; everything else is probed on the
    filesystem.  Raises SourceNotFound when the locator matches nothing.
    """
    if not locator:
        raise SourceNotFound("empty source locator")
    scheme = urllib.parse.urlsplit(locator).scheme
    if scheme in URL_SCHEMES:
        return SourceKind.URL
    kind = fs_probe(locator)
    if kind is None:
        raise SourceNotFound(f"source not found: {locator}")
    return kind


def cache_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


@contextmanager
def _entry_lock(cache_dir: Path, key: str) -> Iterator[None]:
    lock_path = cache_dir / f"{key}.lock"
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _urllib_fetcher(url: str, dest: Path) -> None:
    try:
        with urllib.request.urlopen(url) as response, open(dest, "wb") as out:
            shutil.copyfileobj(response, out, length=1024 * 1024)
    except urllib.error.HTTPError as exc:
        raise FetchFailed(f"fetching {url} failed: HTTP {exc.code} {exc.reason}") from exc
    except urllib.error.URLError as exc:
        raise FetchFailed(f"fetching {url} failed: {exc.reason}") from exc
    except OSError as exc:
        raise FetchFailed(f"fetching {url} failed: {exc}") from exc


def fetch_to_cache(url: str, cache_dir: str | Path, fetcher: Fetcher | None = None, *,
                   refresh: bool = False, offline: bool = False) -> Path:
    """Return a local path holding the bytes of ``url``, downloading at most once.

    A hit returns the stored path without touching the network.  A miss
    downloads to a temporary name and moves it into place atomically, so a
    failed transfer leaves no cache entry behind.  ``refresh`` forces a
    re-download; ``offline`` turns a miss into an error.
    """
    fetcher = fetcher or _urllib_fetcher
    cache_dir = Path(cache_dir)
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CacheUnwritable(f"cannot create cache directory {cache_dir}: {exc}") from exc
    if not os.access(cache_dir, os.W_OK):
        raise CacheUnwritable(f"cache directory {cache_dir} is not writable")

    key = cache_key(url)
    entry_dir = cache_dir / key
    image = entry_dir / "image"
    with _entry_lock(cache_dir, key):
        if image.is_file() and not refresh:
            logger.debug("cache hit for %s at %s", url, image)
            return image
        if offline:
            raise FetchFailed(f"offline mode: {url} is not in the cache")
        entry_dir.mkdir(exist_ok=True)
        tmp = entry_dir / f".partial.{os.getpid()}"
        try:
            fetcher(url, tmp)
            os.replace(tmp, image)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
        fetched_at = time.time()
        (entry_dir / "meta").write_text(
            f"url={url}\nfetched_at={int(fetched_at)}\nsize={image.stat().st_size}\n"
        )
    logger.info("fetched %s (%d bytes)", url, image.stat().st_size)
    return image


def read_cache_entry(cache_dir: str | Path, url: str) -> CacheEntry | None:
    """Look up a cache entry without fetching; None when absent."""
    entry_dir = Path(cache_dir) / cache_key(url)
    image = entry_dir / "image"
    if not image.is_file():
        return None
    fetched_at = 0.0
    meta = entry_dir / "meta"
    if meta.is_file():
        for line in meta.read_text().splitlines():
            if line.startswith("fetched_at="):
                fetched_at = float(line.split("=", 1)[1])
    return CacheEntry(key=cache_key(url), stored_path=image, fetched_at=fetched_at)


def is_archive(name: str) -> bool:
    suffix = Path(name).suffix.lower()
    return suffix == ".zip" or suffix in _DECOMPRESS_SUFFIXES or suffix in _REJECTED_SUFFIXES


def _zst_open(path: Path) -> BinaryIO:
    try:
        import zstandard
    except ImportError:
        raise UnsupportedArchive(
            ".zst archives need the optional zstandard package (pip install imgforge[zstd])"
        ) from None
    return zstandard.ZstdDecompressor().stream_reader(open(path, "rb"), closefd=True)


def _single_image_member(archive: zipfile.ZipFile) -> str:
    members = [m for m in archive.namelist()
               if m.lower().endswith(".img") and not m.endswith("/")]
    if len(members) > 1:
        raise MultipleImagesInArchive(
            f"archive holds {len(members)} images ({', '.join(sorted(members))}); expected one"
        )
    if not members:
        raise UnsupportedArchive("archive contains no .img member")
    return members[0]


def open_image_stream(path: str | Path, name_hint: str | None = None) -> BinaryIO:
    """Open a read stream of the image bytes behind ``path``.

    Compressed sources are decompressed on the fly, which lets a dry run
    inspect the partition table without unpacking anything to disk.  The
    suffix is taken from ``name_hint`` when given (cache entries are stored
    under a fixed name, so the URL's basename carries the real suffix).
    """
    path = Path(path)
    name = name_hint or path.name
    suffix = Path(name).suffix.lower()
    if suffix in _REJECTED_SUFFIXES or Path(Path(name).stem).suffix.lower() == ".tar":
        raise UnsupportedArchive(f"unsupported archive format: {name}")
    try:
        if suffix == ".gz":
            return gzip.open(path, "rb")
        if suffix == ".xz":
            return lzma.open(path, "rb")
        if suffix == ".zst":
            return _zst_open(path)
        if suffix == ".zip":
            archive = zipfile.ZipFile(path)
            return archive.open(_single_image_member(archive))
        return open(path, "rb")
    except zipfile.BadZipFile as exc:
        raise CorruptArchive(f"{path} is not a valid zip archive: {exc}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot open image {path}: {exc}") from exc


def extract_image(archive: str | Path, workspace: str | Path, *,
                  name_hint: str | None = None) -> Path:
    """Unpack a single-image archive into ``workspace``; raw images pass through.

    Already-extracted results are reused, so the unpack cost is paid once
    per cache entry.  Unsupported container formats (tarballs and friends)
    are rejected rather than silently treated as raw images.
    """
    archive = Path(archive)
    workspace = Path(workspace)
    name = name_hint or archive.name
    suffix = Path(name).suffix.lower()
    if suffix in _REJECTED_SUFFIXES or Path(Path(name).stem).suffix.lower() == ".tar":
        raise UnsupportedArchive(f"unsupported archive format: {name}")
    if suffix == ".zip" or suffix in _DECOMPRESS_SUFFIXES:
        workspace.mkdir(parents=True, exist_ok=True)

    if suffix == ".zip":
        try:
            with zipfile.ZipFile(archive) as zf:
                member = _single_image_member(zf)
                out = workspace / Path(member).name
                if out.is_file():
                    return out
                tmp = workspace / f".extract.{os.getpid()}"
                with zf.open(member) as src, open(tmp, "wb") as dst:
                    shutil.copyfileobj(src, dst, length=1024 * 1024)
                os.replace(tmp, out)
                return out
        except zipfile.BadZipFile as exc:
            raise CorruptArchive(f"{archive} is not a valid zip archive: {exc}") from exc

    if suffix in _DECOMPRESS_SUFFIXES:
        inner = Path(name).stem or "image"
        out = workspace / inner
        if out.is_file():
            return out
        tmp = workspace / f".extract.{os.getpid()}"
        try:
            with open_image_stream(archive, name) as src, open(tmp, "wb") as dst:
                shutil.copyfileobj(src, dst, length=1024 * 1024)
        except (gzip.BadGzipFile, lzma.LZMAError, zlib.error, EOFError) as exc:
            tmp.unlink(missing_ok=True)
            raise CorruptArchive(f"cannot decompress {archive}: {exc}") from exc
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
        os.replace(tmp, out)
        return out

    return archive


def copy_image_bytes(src: str | Path, dst: str | Path) -> None:
    """Copy ``src`` to ``dst`` preserving holes where the platform allows.

    The observable contract is byte equality; sparseness is an optimization
    for the large, mostly-empty images this tool handles.
    """
    src, dst = Path(src), Path(dst)
    try:
        with open(src, "rb") as fi, open(dst, "wb") as fo:
            size = os.fstat(fi.fileno()).st_size
            fo.truncate(size)
            pos = 0
            while pos < size:
                try:
                    data_start = os.lseek(fi.fileno(), pos, os.SEEK_DATA)
                except OSError as exc:
                    if exc.errno == errno.ENXIO:
                        break  # trailing hole
                    # SEEK_DATA unsupported here: fall back to a plain copy
                    fi.seek(pos)
                    fo.seek(pos)
                    shutil.copyfileobj(fi, fo, length=1024 * 1024)
                    break
                hole_start = os.lseek(fi.fileno(), data_start, os.SEEK_HOLE)
                fi.seek(data_start)
                fo.seek(data_start)
                remaining = hole_start - data_start
                while remaining > 0:
                    chunk = fi.read(min(1024 * 1024, remaining))
                    if not chunk:
                        break
                    fo.write(chunk)
                    remaining -= len(chunk)
                pos = hole_start
    except OSError as exc:
        raise IoFailure(f"copying {src} to {dst} failed: {exc}") from exc


def write_to_device(src: str | Path, device: str | Path) -> None:
    """Write the bytes of ``src`` onto a block device, without truncating it."""
    try:
        with open(src, "rb") as fi:
            fd = os.open(device, os.O_WRONLY)
            try:
                while True:
                    chunk = fi.read(1024 * 1024)
                    if not chunk:
                        break
                    os.write(fd, chunk)
                os.fsync(fd)
            finally:
                os.close(fd)
    except OSError as exc:
        raise IoFailure(f"writing {src} to device {device} failed: {exc}") from exc


def materialize_destination(plan: "ExecutionPlan", executor: "Executor", *,
                            resolved_source: str | Path | None = None) -> Path:
    """Emit the action that puts the source bytes at the destination.

    In-place plans and identical source/destination paths need no copy at
    all.  A block-device destination becomes a device-write action; a file
    destination becomes an image copy.  Returns the destination path.
    """
    from .executor import Action, ActionKind  # runtime import to avoid a cycle

    src = Path(resolved_source) if resolved_source is not None else Path(plan.source.locator)
    dest = Path(plan.destination.path)
    if plan.inplace:
        return dest
    if plan.destination.kind is TargetKind.BLOCK_DEVICE:
        executor.emit(Action(ActionKind.DEVICE_WRITE, {"src": str(src), "dst": str(dest)}))
        return dest
    if dest.is_dir():
        raise DestinationIsDirectory(f"destination {dest} is a directory")
    if os.path.abspath(src) == os.path.abspath(dest):
        return dest
    executor.emit(Action(ActionKind.COPY_IMAGE, {"src": str(src), "dst": str(dest)}))
    return dest
