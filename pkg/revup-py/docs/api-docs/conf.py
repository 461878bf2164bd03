# Configuration file for the Sphinx documentation builder.  # noqa: INP001
# See https://www.sphinx-doc.org/en/master/usage/configuration.html


project = "revup"
copyright = "2024, revup developers"
author = "revup developers"

extensions = [
    "sphinx.ext.napoleon",
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
    "sphinx_multiversion",
]

html_theme = "sphinx_book_theme"

html_title = "revup API documentation"

html_theme_options = {
    "use_repository_button": False,
    "navigation_with_keys": True,
}

autosummary_generate = True
autodoc_member_order = "bysource"

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store", "conftest.py"]

smv_branch_whitelist = "main"
smv_tag_whitelist = r"^revup-py-.*$"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "pydantic": ("https://docs.pydantic.dev/latest/", None),
}

html_show_sourcelink = False
