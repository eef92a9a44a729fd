"""Adversarial counterfactual regression for continuous treatments.

Subpackages:
    autodiff  - reverse-mode AD engine backing all networks here
    splines   - truncated power basis treatment embeddings
    model     - encoder / treatment predictor / outcome heads
    datagen   - semi-synthetic observational benchmarks with dose bias
    training  - alternating adversarial optimization loop
    theory    - counterfactual metrics and numerical bound verification
    cli       - reproducible command-line pipeline
"""

__version__ = "0.1.0"
