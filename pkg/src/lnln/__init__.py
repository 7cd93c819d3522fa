"""Language-dominant noise-resistant multimodal sentiment regression.

A self-contained implementation (numpy + optional compiled kernels) of a
robust multimodal regression model for incomplete inputs: per-modality
token embeddings, a completeness-weighted blend of the language stream
with a proxy generated from audio/visual, an adversarially trained origin
discriminator, per-modality reconstructors, and hyper-modality fusion.
"""

__version__ = "0.1.0"
