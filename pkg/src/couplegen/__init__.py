"""Coupled image generation toolkit.

Desk-scale engine for generating image sets that share a background while
entities vary per prompt: theta-weighted dual-prompt cross-attention, monotone
theta schedules with derivative-free optimization, and the combined
background-similarity / text-image-alignment metric, wired into a miniature
double-stream -> single-stream denoising pipeline.
"""

__version__ = "0.1.0"
