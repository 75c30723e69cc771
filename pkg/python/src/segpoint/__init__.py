# __init__.py for segpoint package
__version__ = '0.1.0'
