"""Bi-stream salient object detection toolkit: tensor engine, gated fusion,
multi-layer attention, toy network, saliency metrics and dataset curation."""

__version__ = "0.1.0"
