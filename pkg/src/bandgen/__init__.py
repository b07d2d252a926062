"""Steerable multitrack band-music generation toolkit.

Pipeline stages, each usable as a library module or through the `bandgen`
command: MIDI parsing and corpus preprocessing (`midi`, `score`, `synth`),
per-track tokenization with position-constrained pair merging (`tokens`,
`bpe`), per-bar control features (`features`), the conditional sequence
model with training and sampling (`neural`), and fidelity metrics
(`metrics`).
"""

__version__ = "0.1.0"
