#include <cstdio>

int main() {
    std::printf("cinecontrast: cli not wired up yet\n");
    return 0;
}
