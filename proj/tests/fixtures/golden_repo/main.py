# expect: calls through a package import, a from-import alias and a class ctor
import shop.cart
from shop.models.product import Product as P
from shop.utils import *


def main():
    cart = shop.cart.Cart()
    cart.add(P("apple", 3))
    shop.cart.checkout(cart)
    print(cart)


if __name__ == "__main__":
    main()
