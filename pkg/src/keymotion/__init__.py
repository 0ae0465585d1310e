"""Motion retargeting between skinned characters via sparse key-vertex
descriptors and adaptively weighted pose optimization."""

__version__ = "0.1.0"
