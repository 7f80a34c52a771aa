import numpy as np

from frameflow import euclidean_chart, register_chart
from frameflow.manifold import Chart


def strip_chart(half_width=0.3):
    """Flat chart with a bounded domain, for exercising abort handling."""
    base = euclidean_chart(2)
    return Chart(
        name="strip-test",
        dim=2,
        metric=base.metric,
        christoffel=base.christoffel,
        in_domain=lambda x: np.abs(np.asarray(x)[..., 0]) < half_width,
        flat=True,
        unbounded=False,
        distance=base.distance,
    )


register_chart("strip-test", strip_chart())
