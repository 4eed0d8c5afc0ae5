"""
Record/replay of streams and the threaded handoff between a stream and its consumer.

File layout: the 8-byte magic b"OCLSTRM1", then one record per stream batch. A record is a
little-endian int64 count L followed by L little-endian float64 values:

    [segment_id, index, x_ndim, *x_shape, y_ndim, *y_shape, y_is_float, *x.ravel(), *y.ravel()]
"""

import logging
import queue
import struct
import threading
from collections.abc import Iterable, Iterator
from pathlib import Path

import numpy as np
import numpy.typing as npt

from ocl.errors import RecordingFormatError
from ocl.nn_core import Batch
from ocl.streams import StreamBatch

logger = logging.getLogger(__name__)

MAGIC = b"OCLSTRM1"
_COUNT = struct.Struct("<q")
_FLOAT = np.dtype("<f8")


def _encode(batch: StreamBatch) -> bytes:
    x, y = batch.samples.x, batch.samples.y
    y_is_float = float(np.issubdtype(y.dtype, np.floating))
    header = [batch.segment_id, batch.index, x.ndim, *x.shape, y.ndim, *y.shape, y_is_float]
    values = np.concatenate([np.asarray(header, dtype=np.float64), x.ravel(), y.ravel().astype(np.float64)])
    return _COUNT.pack(values.size) + values.astype(_FLOAT).tobytes()


def _decode(values: npt.NDArray[np.float64]) -> StreamBatch:
    if values.size < 5:
        raise RecordingFormatError(f"record too short ({values.size} values)")
    segment_id, index, x_ndim = int(values[0]), int(values[1]), int(values[2])
    pos = 3 + x_ndim
    if values.size <= pos + 1:
        raise RecordingFormatError(f"record {index}: header cut short")
    x_shape = tuple(int(v) for v in values[3:pos])
    y_ndim = int(values[pos])
    y_shape = tuple(int(v) for v in values[pos + 1 : pos + 1 + y_ndim])
    y_is_float = bool(values[pos + 1 + y_ndim])
    pos += 2 + y_ndim
    x_size, y_size = int(np.prod(x_shape)), int(np.prod(y_shape))
    if values.size != pos + x_size + y_size:
        raise RecordingFormatError(f"record {index} holds {values.size} values, expected {pos + x_size + y_size}")
    x = values[pos : pos + x_size].astype(np.float64).reshape(x_shape)
    y_raw = values[pos + x_size :].reshape(y_shape)
    y = y_raw.astype(np.float64) if y_is_float else y_raw.astype(np.int64)
    return StreamBatch(samples=Batch(x=x, y=y), segment_id=segment_id, index=index)


def record_stream(batches: Iterable[StreamBatch], path: Path) -> int:
    """Write every batch to `path`; returns the number of records written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        for batch in batches:
            f.write(_encode(batch))
            count += 1
    logger.info(f"recorded {count} stream batches to {path}")
    return count


def replay_stream(path: Path) -> Iterator[StreamBatch]:
    """Yield the recorded batches in their original order."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise RecordingFormatError(f"{path} is not a recorded stream (bad magic)")
        while True:
            prefix = f.read(_COUNT.size)
            if not prefix:
                return
            if len(prefix) != _COUNT.size:
                raise RecordingFormatError(f"{path}: truncated record length")
            (length,) = _COUNT.unpack(prefix)
            if length < 0:
                raise RecordingFormatError(f"{path}: negative record length {length}")
            payload = f.read(length * _FLOAT.itemsize)
            if len(payload) != length * _FLOAT.itemsize:
                raise RecordingFormatError(f"{path}: truncated record")
            yield _decode(np.frombuffer(payload, dtype=_FLOAT))


_DONE = object()


def threaded_batches(batches: Iterable[StreamBatch], maxsize: int = 8) -> Iterator[StreamBatch]:
    """
    Produce `batches` on a worker thread and hand them over through a bounded queue.

    The order is preserved; an exception raised by the producer is re-raised in the consumer.
    """
    handoff: queue.Queue[object] = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def produce() -> None:
        try:
            for batch in batches:
                while not stop.is_set():
                    try:
                        handoff.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            handoff.put(_DONE)
        except BaseException as e:  # handed to the consumer
            handoff.put(e)

    worker = threading.Thread(target=produce, name="ocl-stream-producer", daemon=True)
    worker.start()
    try:
        while True:
            item = handoff.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            assert isinstance(item, StreamBatch)
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
