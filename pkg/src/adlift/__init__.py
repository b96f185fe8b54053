"""Individual advertising effect estimation under multiple ordered treatments.

Core pieces: a taped autodiff engine (``tensor``), a shared-representation
outcome model (``model``), Sinkhorn/Wasserstein distribution distances
(``ipm``), a confounded synthetic world with known potential outcomes
(``synthetic``), the balanced training objective (``trainer``), effect-error
evaluation (``evaluation``), and a leverage-rate bidding simulator
(``bidding``). The ``adlift`` CLI drives the full pipeline.
"""

__version__ = "0.1.0"
