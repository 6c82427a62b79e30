"""Epidemic push-pull overlay simulation with a distributed CF recommender.

The package is organized around one generic gossip engine (``pushpull``)
whose merge / select / neighborhood-adaptation steps are parameterized by a
utility function.  Three protocol variants are configurations of that engine:

* ``anti-entropy``: global view, freshest-timestamp replication,
* ``newscast``:     partial view of size k, freshest-timestamp news items,
* ``swarmix``:      partial view of size k, rating-profile similarity utility.

On top of the overlay sit a user-based collaborative filter (``recommend``),
a deterministic cycle simulator (``engine``), topology and quality metrics
(``metrics``), and an experiment harness with all-but-1 evaluation
(``harness``).  ``cli`` is the operational surface.
"""

__version__ = "0.1.0"
