"""MRI glioma workflow: DICOM curation, routed segmentation, radiomics and evaluation."""

__version__ = "0.1.0"
