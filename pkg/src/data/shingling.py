"""Shingling: scalar series to overlapping fixed-width windows."""
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import InvalidInputError
from .streams import LabeledStream

# Window width used for univariate benchmark series.
DEFAULT_SHINGLE_WIDTH = 10


def shingle(
    series: Sequence[float], width: int, labels: Optional[Sequence[int]] = None, name: str = "shingled"
) -> LabeledStream:
    """Turn a scalar series into ``n - width + 1`` overlapping windows.

    Window ``i`` covers points ``i .. i + width - 1`` and is anomalous if any covered
    point is.

    Raises:
        InvalidInputError: If ``width < 2`` or the series is shorter than ``width``
    """
    values = np.asarray(series, dtype=np.float64).ravel()
    if width < 2:
        raise InvalidInputError(f"shingle width must be >= 2, got {width}")
    if values.size < width:
        raise InvalidInputError(f"series of length {values.size} is shorter than the shingle width {width}")
    windows = sliding_window_view(values, width).copy()
    window_labels = None
    if labels is not None:
        point_labels = np.asarray(labels).astype(np.int64).ravel()
        if point_labels.shape != values.shape:
            raise InvalidInputError("labels must align with the series")
        window_labels = sliding_window_view(point_labels, width).max(axis=1)
    return LabeledStream(instances=windows, labels=window_labels, name=name, extra={"shingle_width": width})


def shingle_stream(stream: LabeledStream, width: int) -> LabeledStream:
    """Shingle a one-column stream, shifting drift markers to window indices."""
    if stream.d != 1:
        raise InvalidInputError(f"Only univariate streams can be shingled, got d={stream.d}")
    out = shingle(stream.instances[:, 0], width, stream.labels, name=stream.name)
    markers = tuple(sorted({max(0, m - width + 1) for m in stream.drift_markers}))
    return LabeledStream(
        instances=out.instances,
        labels=out.labels,
        name=stream.name,
        drift_markers=markers,
        synthetic=stream.synthetic,
        extra={**stream.extra, "shingle_width": width},
    )
