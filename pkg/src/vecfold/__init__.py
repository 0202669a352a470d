"""vecfold: embed, cluster, project, and report on marketplace post corpora.

The pipeline turns a line-delimited corpus of text+image posts into prompt
strings with inline image placeholder tokens, acquires one fixed-width
embedding per post, stores the vectors in an out-of-core binary matrix,
clusters them with k-means, projects a sample to 2D for plotting, and
reports the posts nearest each cluster centroid.
"""

__version__ = "0.1.0"
