# expect: relative star import recorded as "shop.utils"
from .utils import *

__all__ = ["cart"]
