"""Spacelike mean curvature flow with a capillary boundary in a Minkowski cone.

Modules: ``domain`` (cone generating curve), ``mesh`` (star grid and
derivative stencils), ``geometry`` (pointwise graph geometry), ``capillary``
(boundary operator), ``flow`` (time stepping and initial data), ``monitors``
(a priori estimates per slice), ``expander`` (self-similar limits), ``io`` and
``cli``. The package root stays import-light so the CLI can set thread
limits before numpy loads.
"""

__version__ = "0.1.0"
