from .utils import __version__, __spectraseg_dir__
