# Configuration file for the Sphinx documentation builder.
#
# Only the options that differ from the sphinx-quickstart defaults are set
# here. For the full list see
# http://www.sphinx-doc.org/en/master/config

# -- Path setup --------------------------------------------------------------

import os
import sys

sys.path.insert(0, os.path.abspath(".."))
from streamant import __version__ as streamant_version

# -- Project information -----------------------------------------------------

project = "streamant"
copyright = "2022, streamant contributors"
author = "streamant contributors"

# The short X.Y version
version = streamant_version
# The full version, including alpha/beta/rc tags
release = streamant_version

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"
language = None
exclude_patterns = []
pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------------

html_theme = "alabaster"
html_static_path = ["_static"]
htmlhelp_basename = "streamantdoc"

# -- Options for manual page output ------------------------------------------

man_pages = [(master_doc, "streamant", "streamant Documentation", [author], 1)]
