"""Fixed English stopword list used by rule-based query cleaning.

The list is versioned: changing it changes cleaned queries, which changes
embedding cache keys downstream, so bump STOPWORDS_VERSION on any edit.
Single letters that can carry meaning in documents (variable names like
"m", option labels) are deliberately kept out.
"""

STOPWORDS_VERSION = "en-v1"

STOPWORDS = frozenset(
    """
    a an the
    and or but nor so yet
    if then else
    when while where why how what which who whom whose
    this that these those there here
    i you he she it we they me him her us them
    my your his its our their mine yours hers ours theirs
    am is are was were be been being
    do does did doing
    have has had having
    will would shall should can could may might must
    not no
    of in on at by for with about against between into through
    during before after above below to from up down out off over under
    again further once
    as until because than too very only own same such just also
    """.split()
)
