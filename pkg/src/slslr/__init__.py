"""Self-supervised pretraining for skeleton sign-language sequences: a
three-branch negative-free objective, part-permutation positive pairs and a
boundary-importance search, with linear-probe / fine-tune evaluation."""

__version__ = "0.1.0"
