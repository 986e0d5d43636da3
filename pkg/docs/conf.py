"""Sphinx configuration of the aoiprobe manual

The pages are Markdown (install, how-to-use, technical-explanation) plus the autodoc reference in python-api.rst.
The technical explanation writes the Bellman equations in LaTeX, so MathJax is enabled.
"""

import os
import sys

# Document the checked-out sources rather than an installed copy
sys.path.insert(0, os.path.abspath(".."))

import aoiprobe  # noqa: E402

project = "aoiprobe"
author = "aoiprobe contributors"
copyright = author
release = aoiprobe.__version__
version = release.rsplit(".", 1)[0]

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",  # "Parameters:" blocks of the runtype dataclasses
    "sphinx.ext.mathjax",
    "recommonmark",
    "sphinx_markdown_tables",  # CSV schemas in how-to-use.md
    "sphinx_copybutton",
    "enum_tools.autoenum",  # HarvestState
]

source_suffix = {".rst": "restructuredtext", ".md": "markdown"}
master_doc = "index"
language = "en"
exclude_patterns = ["_build"]

# Keep the order of the source: the solvers read top-down, from tables to thresholds
autodoc_member_order = "bysource"
autodoc_typehints = "description"
napoleon_google_docstring = True
napoleon_numpy_docstring = False

html_theme = "sphinx_rtd_theme"
html_title = f"aoiprobe {release}"
html_show_sourcelink = False

# Sweeps and learning runs are long; examples in the manual are never executed
copybutton_prompt_text = "$ "
