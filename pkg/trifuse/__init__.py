"""TriFuse low-light enhancement: wavelet diffusion, edge sharpening and IQA"""

__version__ = "1.0.0"
