#include <cstdio>

int main() {
    std::puts("rrpo: placeholder");
    return 0;
}
