#include <cstdio>

int main() {
    std::puts("tsfuse: placeholder");
    return 0;
}
