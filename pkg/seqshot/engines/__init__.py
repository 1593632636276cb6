"""Few-shot detection systems.

Systems enroll from K unsegmented shots without reading any other audio and
then score evaluation clips; higher scores mean "more likely the target".
"""
