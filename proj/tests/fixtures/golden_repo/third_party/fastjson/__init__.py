# expect: vendored code is analysed like any other script
def loads(text):
    return eval(text)
