"""Knowledge graph embeddings with loss functions analyzed as Bregman divergences.

Modules: ``data`` (triples, queries, empirical distributions), ``bregman``
(generators and divergences), ``losses``, ``oracle`` (objective
distributions and their brute-force certification), ``models``,
``trainer``, ``evaluation``, ``config`` and ``cli``. ``estimator`` wraps
training in a scikit-learn estimator.
"""

__version__ = "0.1.0"
